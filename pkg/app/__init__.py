"""Confidence Screen: validity screening for verbalised LLM confidence."""
