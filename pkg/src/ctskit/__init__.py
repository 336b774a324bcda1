"""Conversational tree search toolkit.

Train and evaluate controllable dialog-tree agents with simulated users,
generate training utterances directly from the tree with LLM prompting,
measure the quality of the generated data, and serve trained policies to
human users over a JSON session API.
"""

__version__ = "0.1.0"
