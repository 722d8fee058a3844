"""Sysmon-driven software threat assessment: event ingest, process graph,
CTI knowledge base, rule classifier, and OpenC2 course-of-action dispatch."""

__version__ = "0.1.0"
