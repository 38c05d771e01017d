"""Two-branch deep matrix completion."""
