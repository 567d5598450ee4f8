"""Distribution planning with DER as non-wires alternatives, solved as a
single-level MILP from a planner/investor bilevel model."""

__version__ = "0.1.0"
