"""
querysynth
Synthesizes instance-optimized execution plans for analytical SQL queries with an
LLM-driven agent pipeline, runs them on a columnar kernel library and checks every
result against a built-in reference interpreter.
"""

__version__ = "0.4.0"
