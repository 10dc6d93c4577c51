"""Consensus roles, leader election, DA log and mock proofs."""
