"""Online-adaptive low-rank KV-cache compression."""
