"""Black-box access to a served model: in-process, or over TCP."""

from hspi.oracle.local import LocalOracle, Oracle, OracleInfo, QueryResponse

__all__ = ["LocalOracle", "Oracle", "OracleInfo", "QueryResponse"]
