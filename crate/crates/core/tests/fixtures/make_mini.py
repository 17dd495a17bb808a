"""Generates mini.tsv and the brute-force 5-core reference mini_5core.tsv."""
import random

rng = random.Random(20240611)
users = [f"u{k:02d}" for k in range(24)]
items = [f"i{k:02d}" for k in range(18)]
pairs = set()
lines = []
while len(lines) < 200:
    # skewed draws so that some users/items fall below the core threshold
    u = users[min(int(rng.expovariate(1 / 8)), len(users) - 1)]
    i = items[min(int(rng.expovariate(1 / 6)), len(items) - 1)]
    if (u, i) in pairs and rng.random() < 0.9:
        continue
    pairs.add((u, i))
    lines.append(f"{u}\t{i}\textra\n")
with open("mini.tsv", "w") as f:
    f.writelines(lines)
