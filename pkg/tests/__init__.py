# Tests for the two-hop molecular relay simulator
