"""UDP split-loop transport: packet codec, cycle timing and the two nodes."""
