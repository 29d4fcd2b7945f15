"""Keyword-spotting trainer: weighted Adam training, QAT, KWSM export."""
