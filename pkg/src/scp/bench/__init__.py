"""Benchmark workload: Person records, map by age decile, then group_by_key."""
from .people import KEYED, NAMES, PERSON, Person, by_decile, gen_people, split
from .harness import BenchReport, GateFailure, bench, check_gate, oracle, parse_report, speedup

__all__ = [
    "BenchReport", "GateFailure", "KEYED", "NAMES", "PERSON", "Person", "bench", "by_decile",
    "check_gate", "gen_people", "oracle", "parse_report", "speedup", "split",
]
