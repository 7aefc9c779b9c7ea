"""Reference evaluator: trains real CNNs/MLPs for an engine process that
speaks the line-delimited JSON wire protocol over stdin/stdout."""

PROTOCOL_VERSION = 1

__version__ = "0.1.0"
