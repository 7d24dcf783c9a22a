"""cruxkit: dataset construction, reward scoring, and policy-gradient math
for structured Verilog generation around the CRUX intermediate form."""

__version__ = "0.1.0"
