"""tabforge: code-driven table reasoning annotation pipeline.

Turns <table code, question, ground-truth answer> triples into verified
multi-step-reasoning annotations: prompt an LLM annotator, execute the
emitted Python in a policed sandbox, keep only answers that match ground
truth, curate the survivors into a balanced dataset, and score predictions
with table-QA metrics and group-relative reward math.
"""

__version__ = "0.1.0"
