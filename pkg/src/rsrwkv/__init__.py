"""RSRWKV building blocks: WKV kernels, 2D scans, token shifts, backbone."""
