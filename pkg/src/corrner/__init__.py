"""corrner: retrieval-augmented named-entity recognition toolkit.

Retrieves correlated texts from an unlabeled in-domain pool with BM25, tags
with a trainable linear-chain CRF, calibrates predicted entity types by
cross-instance majority voting, and can inject retrieval-derived correlation
features into the tagger at training time.
"""

__version__ = "0.1.0"
