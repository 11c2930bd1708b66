"""Discrete-event simulator of OLAP application servers driving a partitioned RDBMS array."""

__version__ = "0.1.0"
