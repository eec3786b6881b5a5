# One registration and two logins, message by message.
#
# The simulated cluster runs the real gateway and share-server code in
# memory.  Every frame that crosses a link is logged, so we can print the
# whole conversation.  Run with:  python demos/02_login_walkthrough.py

from splitauth import SimCluster, SplitMode
from splitauth.protocol import decode_one

cluster = SimCluster(n=2, mode=SplitMode.SEGMENT, seed=42)

cluster.register("Alex", "0504")
client, gateway, _ = cluster.login("Alex", "0504")
print("correct password ->", client.stage.value, "/", gateway.stage.value)
print("keys agree:", client.session_key == gateway.session_key)

client, gateway, _ = cluster.login("Alex", "6451")
print("wrong password   ->", client.stage.value, "/", gateway.stage.value)

print()
print("frames on the wire:")
for src, dst, frame in cluster.log:
    message = decode_one(frame)
    print(f"  {src:>8} -> {dst:<8} {message}")

# Each server only ever saw its own half of the digest.
for i in (1, 2):
    share = cluster.node_store(i).get("Alex")
    print(f"node {i} holds share {share.index}: {share.payload.hex()}")
