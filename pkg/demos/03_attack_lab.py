# Running the four adversaries against a few deployments.
#
# The dictionary is every 4-digit PIN, so it contains the victim's password.
# The report shows which attacks the construction actually stops.
# Run with:  python demos/03_attack_lab.py

from splitauth import SimCluster, SplitMode
from splitauth.harness import compromise_attack, eavesdrop_dictionary_attack, run_comparison_report

pins = [f"{i:04d}" for i in range(10_000)]

# Leak of one server's store: segments give the password away, XOR shares do not.
for mode in SplitMode:
    cluster = SimCluster(n=2, mode=mode, seed=0)
    cluster.register("Alex", "0504")
    report = compromise_attack(cluster, [2], pins)
    print(f"{mode.value:>7}: one store leaked -> {report.successes}/{report.trials} identified ({report.notes})")

# An eavesdropper on a login can test every PIN against the observed proof offline.
cluster = SimCluster(n=2, mode=SplitMode.XOR, seed=0)
cluster.register("Alex", "0504")
_, _, transcript = cluster.login("Alex", "0504")
print("eavesdropped login:", eavesdrop_dictionary_attack(transcript, pins, "0504").notes)

print()
print(run_comparison_report(seed=7, dictionary=pins, impersonation_trials=500))
