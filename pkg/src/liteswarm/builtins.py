"""Builtin tool handlers shipped with the engine."""

from __future__ import annotations

from .tools import builtin_tool


def search_news(keyword: str, max_results: int = 5) -> str:
    """Search news based on keywords"""
    return f"By searching for {keyword}, I've found {max_results} related pieces of information."


SEARCH_NEWS_SPEC, _ = builtin_tool(search_news)

HANDLERS = {"search_news": search_news}
