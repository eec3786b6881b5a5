# Splitting a password digest across servers.
#
# A password is reduced to its SHA-256 digest, and the digest is cut into one
# share per server.  Two ways to cut it are available: contiguous segments,
# and XOR masks.  Run with:  python demos/01_splitting_a_digest.py

import random

from splitauth import SplitMode, compute_digest, recombine_shares, split_digest

digest = compute_digest("0504")
print("digest of '0504':", digest.hex())

# Segment mode: share i is a slice; 32 bytes over 3 servers gives 11 + 11 + 10.
for share in split_digest(digest, 3, SplitMode.SEGMENT):
    print(f"  segment share {share.index}/{share.total}: {share.payload.hex()}")

# Each segment is literally part of the digest, so it leaks those bytes.
seg = split_digest(digest, 2, SplitMode.SEGMENT)
print("first segment is a prefix of the digest:", digest.startswith(seg[0].payload))

# Xor mode: n-1 shares are random, the last one masks the digest with all of them.
rng = random.Random(1)
xor = split_digest(digest, 3, SplitMode.XOR, rng)
for share in xor:
    print(f"  xor share {share.index}/{share.total}: {share.payload.hex()}")

# Either way, the complete set recombines to the digest, in any order.
print("segment recombines:", recombine_shares(reversed(seg)) == digest)
print("xor recombines:    ", recombine_shares(xor) == digest)
