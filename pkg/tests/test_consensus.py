import hashlib
import json
from collections import Counter

import pytest
from scipy.stats import chisquare

from spacenet.config import parse_config
from spacenet.consensus.bus import MessageBus
from spacenet.consensus.chain import GENESIS_HASH, Block, Chain, Tx, TxKind, pack_block
from spacenet.consensus.da import DALoadError, DAStore
from spacenet.consensus.election import ElectionError, LeaderQueue, elect_leader, refill_queue, replace_head
from spacenet.consensus.proofs import ProofSystem, verify_transcript
from spacenet.consensus.roles import (
    ExceptionReason,
    ValidatorState,
    handle_exception,
    leader_epoch,
    skip_threshold_met,
    validator_epoch,
)
from spacenet.consensus.vdf import vdf_eval, vdf_eval_checkpoints, vdf_verify
from spacenet.identity import KeyRegistry
from spacenet.sim.runner import Simulation


class TestVdf:
    def test_zero(self):
        assert vdf_eval(b"s" * 32, 0) == b"s" * 32

    @pytest.mark.parametrize("d", [1, 10, 1000])
    def test_round_trip(self, d):
        seed = hashlib.sha256(str(d).encode()).digest()
        out, cps = vdf_eval_checkpoints(seed, d)
        assert out == vdf_eval(seed, d)
        assert vdf_verify(seed, d, out)
        assert vdf_verify(seed, d, out, cps)

    def test_every_bit_flip_rejected(self):
        seed = bytes(32)
        out = vdf_eval(seed, 10)
        for i in range(256):
            bad = bytearray(out)
            bad[i // 8] ^= 1 << (i % 8)
            assert not vdf_verify(seed, 10, bytes(bad))

    def test_bad_checkpoint(self):
        out, cps = vdf_eval_checkpoints(bytes(32), 200)
        cps[1] = bytes(32)
        assert not vdf_verify(bytes(32), 200, out, cps)

    def test_negative(self):
        with pytest.raises(ValueError):
            vdf_eval(b"", -1)
        assert not vdf_verify(b"", -1, b"")


class TestElection:
    def draws(self, weights, n=10_000):
        return Counter(elect_leader(weights, hashlib.sha256(i.to_bytes(4, "big")).digest(), GENESIS_HASH) for i in range(n))

    def test_single(self):
        assert set(self.draws({"A": 3.0}, 100)) == {"A"}

    def test_zero_weight_never(self):
        c = self.draws({"A": 1.0, "B": 0.0, "C": 2.0})
        assert c["B"] == 0

    def test_uniform(self):
        c = self.draws({k: 1.0 for k in "ABCD"})
        counts = [c[k] for k in "ABCD"]
        assert all(abs(x - 2500) <= 150 for x in counts)
        assert chisquare(counts).pvalue > 0.01

    def test_proportional(self):
        c = self.draws({"A": 1.0, "B": 3.0})
        assert c["B"] / 10_000 == pytest.approx(0.75, abs=0.02)

    def test_all_zero(self):
        with pytest.raises(ElectionError):
            elect_leader({"A": 0.0}, bytes(32), GENESIS_HASH)

    def test_exclude(self):
        assert elect_leader({"A": 1.0, "B": 1.0}, bytes(32), GENESIS_HASH, exclude=["A"]) == "B"


class TestQueue:
    W = {"V00": 1.0, "V01": 2.0, "V02": 1.5}

    def test_fresh(self):
        q = refill_queue(LeaderQueue(4), self.W, GENESIS_HASH, -1, 8, consume=False)
        assert [e for e, _ in q.snapshot()] == [0, 1, 2, 3]

    def test_sliding(self):
        q = refill_queue(LeaderQueue(4), self.W, GENESIS_HASH, -1, 8, consume=False)
        refill_queue(q, self.W, b"\x01" * 32, 0, 8)
        assert [e for e, _ in q.snapshot()] == [1, 2, 3, 4]
        assert q.entries[-1].seed_epoch == 0

    def test_replicas_agree(self):
        qs = []
        for _ in range(2):
            q = refill_queue(LeaderQueue(3), self.W, GENESIS_HASH, -1, 8, consume=False)
            for e in range(10):
                refill_queue(q, self.W, hashlib.sha256(bytes([e])).digest(), e, 8)
            qs.append(q.snapshot())
        assert qs[0] == qs[1]

    def test_replace_head_excludes(self):
        q = refill_queue(LeaderQueue(2), self.W, GENESIS_HASH, -1, 8, consume=False)
        first = q.head.leader
        new = replace_head(q, [first], 8)
        assert new.leader != first and new.round == 1 and new.epoch == 0
        with pytest.raises(ElectionError):
            replace_head(q, list(self.W), 8)

    def test_push_rules(self):
        q = refill_queue(LeaderQueue(2), self.W, GENESIS_HASH, -1, 1, consume=False)
        with pytest.raises(ValueError, match="full"):
            q.push(q.head)
        q.pop()
        with pytest.raises(ValueError, match="increase"):
            q.push(q.head)
        with pytest.raises(ValueError):
            LeaderQueue(0)


class TestSkipThreshold:
    @pytest.mark.parametrize("n", range(1, 21))
    def test_arithmetic(self, n):
        for v in range(n + 1):
            assert skip_threshold_met(v, n) == (v > 2 * n / 3)

    def test_examples(self):
        assert skip_threshold_met(3, 4) and not skip_threshold_met(2, 4) and skip_threshold_met(3, 3)

    def test_handle(self):
        s = ValidatorState("L", 100.0)
        out = handle_exception(0, s, "BadWeight", {"A": 0, "B": 2, "C": 5}, 4, 10, 0.1, 3, 3)
        assert out.skipped and out.slashed == pytest.approx(10.0) and s.stake == pytest.approx(90.0)

    def test_late_votes_do_not_count(self):
        s = ValidatorState("L", 100.0)
        out = handle_exception(0, s, "Timeout", {"A": 0, "B": 1, "C": 11}, 4, 10, 0.1, 3, 3)
        assert not out.skipped and out.fallback == "empty_block" and s.slashed == 0.0

    def test_resync_fallback(self):
        out = handle_exception(0, ValidatorState("L", 1.0), "Timeout", {"A": 0}, 4, 10, 0.1, 3, 5)
        assert out.fallback == "resync"


# --- chain packing --------------------------------------------------------------


@pytest.fixture
def users():
    reg = KeyRegistry()
    for u in ("U0", "U1", "U2"):
        reg.create(0, u)
    return reg


def txs(reg, n, gas=40, sender="U0"):
    return [Tx(sender, i, gas, 100 - i, TxKind.TRANSFER).signed(reg.get(sender)) for i in range(n)]


class TestPacking:
    def test_two_per_block(self, users):
        pool = txs(users, 10)
        nonces = {}
        sizes = []
        while pool:
            packed, _ = pack_block(pool, users, nonces, 100)
            sizes.append(len(packed))
            for t in packed:
                pool.remove(t)
                nonces[t.sender] = t.nonce + 1
        assert sizes == [2, 2, 2, 2, 2]

    def test_invalid_excluded(self, users):
        good = txs(users, 2, gas=10)
        bad = Tx("U1", 0, 10, 999, TxKind.TRANSFER, bytes(32))
        packed, rejected = pack_block(good + [bad], users, {}, 100)
        assert packed == good and rejected == [bad]

    def test_fee_order_across_senders(self, users):
        a = Tx("U0", 0, 10, 5, TxKind.TRANSFER).signed(users.get("U0"))
        b = Tx("U1", 0, 10, 50, TxKind.TRANSFER).signed(users.get("U1"))
        assert pack_block([a, b], users, {}, 100)[0] == [b, a]

    def test_chain_append(self):
        c = Chain()
        b1 = Block(1, GENESIS_HASH, 0, None, empty=True)
        c.append(b1)
        with pytest.raises(ValueError):
            c.append(Block(3, b1.hash, 0, None))
        assert c.hash_at(0) == GENESIS_HASH and c.hash_at(1) == b1.hash

    def test_tx_round_trip(self, users):
        t = txs(users, 1)[0]
        assert Tx.from_json(t.to_json()) == t


# --- leader / validator over a real epoch ------------------------------------------------


@pytest.fixture
def epoch0():
    cfg = parse_config({"seed": 11, "n_receivers": 30, "n_validators": 4, "epochs": 1, "consensus": {"txs_per_epoch": 0}})
    sim = Simulation(cfg)
    sim.world.measure(0, GENESIS_HASH, sim.bus)
    sim.ctx.mempool = []
    return sim


def check_all(sim, proposal, leader):
    return {v: validator_epoch(sim.ctx, sim.chains[v], proposal, 0, leader, 0) for v in sim.vids if v != leader}


class TestEpoch:
    def test_honest(self, epoch0):
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0)
        assert len(p.blocks) == 2
        assert all(not b.txs for b in p.blocks)
        assert p.blocks[0].delta_s is None and p.blocks[-1].delta_s is not None
        assert all(v.accepted for v in check_all(epoch0, p, "V00").values())

    def test_packing_in_epoch(self, epoch0):
        epoch0.ctx.mempool = txs(epoch0.registry, 10, sender="U0")
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0)
        assert [len(b.txs) for b in p.blocks] == [2, 2]
        assert all(v.accepted for v in check_all(epoch0, p, "V00").values())

    def test_invalid_tx_in_mempool_excluded(self, epoch0):
        epoch0.ctx.mempool = txs(epoch0.registry, 1, gas=10, sender="U1") + [Tx("U2", 0, 10, 999, TxKind.ALPHA, bytes(32))]
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0)
        assert [t.sender for b in p.blocks for t in b.txs] == ["U1"]

    @pytest.mark.parametrize(
        "fault,reason",
        [
            ("tamper_weight", ExceptionReason.BAD_WEIGHT),
            ("tamper_proof", ExceptionReason.BAD_PROOF),
            ("invalid_tx", ExceptionReason.BAD_TX),
            ("late_proof", ExceptionReason.LATE_PROOF),
        ],
    )
    def test_faulty_leader(self, epoch0, fault, reason):
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0, fault=fault)
        verdicts = check_all(epoch0, p, "V00")
        assert all(v.reason == reason for v in verdicts.values())

    def test_silent(self, epoch0):
        assert validator_epoch(epoch0.ctx, Chain(), None, 0, "V00", 0).reason == ExceptionReason.TIMEOUT

    def test_wrong_leader_signature(self, epoch0):
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0)
        assert validator_epoch(epoch0.ctx, Chain(), p, 0, "V01", 0).reason == ExceptionReason.BAD_SIGNATURE

    def test_gas(self, epoch0):
        p = leader_epoch(epoch0.ctx, "V00", epoch0.chains["V00"], 0, 0)
        b = p.blocks[0]
        b.txs = txs(epoch0.registry, 3, gas=40, sender="U0")
        b._hash = None
        b.sign(epoch0.registry.get("V00"))
        p.blocks[1] = Block(2, b.hash, 0, "V00", [], p.blocks[1].delta_s, p.blocks[1].proofs_ref).sign(epoch0.registry.get("V00"))
        assert validator_epoch(epoch0.ctx, Chain(), p, 0, "V00", 0).reason == ExceptionReason.GAS


# --- proofs and DA -----------------------------------------------------------------


@pytest.fixture
def proof_env():
    da = DAStore()
    for i in range(3):
        da.append({"type": "alpha", "x": i})
    ps = ProofSystem(da)
    ps.register("sum", lambda recs, params: {"s": sum(r["x"] for r in recs) * params.get("k", 1)})
    return da, ps


class TestProofs:
    def test_honest(self, proof_env):
        _, ps = proof_env
        pi, out = ps.prove("st", "sum", [0, 1, 2], {"k": 2})
        assert out == {"s": 6}
        assert verify_transcript(pi, ps, {"k": 2})
        assert not ps.verify(pi, {"k": 3})

    def test_output_flipped(self, proof_env):
        _, ps = proof_env
        pi, _ = ps.prove("st", "sum", [0, 1])
        bad = type(pi)(pi.statement_id, pi.fn_id, pi.inputs, pi.input_commitment, bytes(32))
        assert not ps.verify(bad)

    def test_inputs_altered(self, proof_env):
        da, ps = proof_env
        pi, _ = ps.prove("st", "sum", [0, 1])
        da._tamper(1, {"type": "alpha", "x": 100, "v": 1})
        assert not ps.verify(pi)

    def test_memoized(self, proof_env):
        _, ps = proof_env
        pi, _ = ps.prove("st", "sum", [0, 1, 2])
        for _ in range(5):
            ps.verify(pi)
        assert ps.executions == 1

    def test_unknown(self, proof_env):
        _, ps = proof_env
        with pytest.raises(KeyError):
            ps.prove("st", "nope", [0])

    def test_json_round_trip(self, proof_env):
        _, ps = proof_env
        pi, _ = ps.prove("st", "sum", [2])
        assert type(pi).from_json(json.loads(json.dumps(pi.to_json()))) == pi


class TestDA:
    def test_append_fetch(self):
        da = DAStore()
        assert da.append({"type": "mesh", "satellite": "S0"}) == 0
        da.append({"type": "flow", "window": 1})
        assert da.fetch("mesh") == [{"type": "mesh", "satellite": "S0", "v": 1}]
        assert da.find("flow", window=1) == [1]

    def test_needs_type(self):
        with pytest.raises(ValueError):
            DAStore().append({"x": 1})

    def test_not_serializable(self):
        with pytest.raises(ValueError):
            DAStore().append({"type": "x", "bad": float("nan")})

    def test_caller_mutation_isolated(self):
        da = DAStore()
        rec = {"type": "x", "items": [1]}
        da.append(rec)
        rec["items"].append(2)
        da.get(0)["items"].append(3)
        assert da.get(0)["items"] == [1]

    def test_reload(self, tmp_path):
        p = tmp_path / "da.jsonl"
        da = DAStore(p)
        for i in range(5):
            da.append({"type": "t", "i": i})
        assert DAStore.load(p).dumps() == da.dumps() == p.read_bytes()

    def test_truncated(self, tmp_path):
        da = DAStore()
        for i in range(5):
            da.append({"type": "t", "i": i})
        data = da.dumps()
        cut = data[: data.index(b"\n", data.index(b'"i":3')) - 3]
        with pytest.raises(DALoadError) as err:
            DAStore.loads(cut)
        assert err.value.offset == 3
        assert err.value.byte_pos == sum(len(line) + 1 for line in data.split(b"\n")[:3])

    def test_non_canonical(self):
        with pytest.raises(DALoadError) as err:
            DAStore.loads(b'{"type":"t","v":1}\n{"v": 1, "type": "t"}\n')
        assert err.value.offset == 1


class TestBus:
    def test_order(self):
        bus = MessageBus()
        bus.send("a", "b", "x", 1, delay=2)
        bus.send("a", "b", "x", 2, delay=1)
        bus.send("a", "b", "x", 3, delay=1)
        assert [m.payload for m in bus.deliver_until(5)] == [2, 3, 1]
        assert bus.now == 5

    def test_receive_leaves_others(self):
        bus = MessageBus()
        bus.send("a", "b", "x", 1)
        bus.send("a", "c", "y", 2)
        assert bus.receive("c", "y", until=1).payload == 2
        assert bus.pending() == 1

    def test_drop(self):
        bus = MessageBus()
        bus.drop.add(("a", "b", "x"))
        assert bus.send("a", "b", "x") is None
        assert bus.pending() == 0 and len(bus.log) == 1

    def test_negative_delay(self):
        with pytest.raises(ValueError):
            MessageBus().send("a", "b", "x", delay=-1)
