"""Tests for response sanitisation and answer normalisation."""
import pytest

from app.services.text_normalization import (
    answer_tokens,
    normalize_answer,
    sanitize_response,
    validate_question,
)


class TestSanitizeResponse:
    """Test cases for response sanitisation."""

    def test_line_endings(self):
        """Test that CRLF and CR become LF."""
        assert sanitize_response("a\r\nb\rc") == "a\nb\nc"

    def test_control_characters_removed(self):
        """Test that NUL and other control chars are dropped, tabs kept."""
        assert sanitize_response("a\x00b\x07c\td") == "abc\td"

    def test_none(self):
        """Test that None becomes an empty string."""
        assert sanitize_response(None) == ""


class TestValidateQuestion:
    """Test cases for item question validation."""

    def test_valid_question(self):
        """Test that a normal question passes through."""
        assert validate_question("What is the capital of France?") == "What is the capital of France?"

    def test_empty_question(self):
        """Test that whitespace-only questions are rejected."""
        with pytest.raises(ValueError):
            validate_question("   ")

    def test_oversized_question(self):
        """Test the length limit."""
        with pytest.raises(ValueError):
            validate_question("x" * 11, max_chars=10)


class TestNormalizeAnswer:
    """Test cases for answer normalisation."""

    def test_articles_and_punctuation(self):
        """Test the standard trivia normalisation."""
        assert normalize_answer("The Eiffel Tower!") == "eiffel tower"

    def test_whitespace_collapsed(self):
        """Test that runs of whitespace collapse to one space."""
        assert normalize_answer("  New   York\nCity ") == "new york city"

    def test_article_inside_word_kept(self):
        """Test that 'an' inside 'Anchorage' survives."""
        assert normalize_answer("Anchorage") == "anchorage"

    def test_tokens(self):
        """Test tokenisation of the normalised answer."""
        assert answer_tokens("A Tale of Two Cities") == ["tale", "of", "two", "cities"]
