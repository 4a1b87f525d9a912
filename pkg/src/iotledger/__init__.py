"""Blockchain-backed IoT communication log store with verifiable encrypted range search."""
