"""
Walking the bundled taxonomy
============================

Labels are dotted-decimal ids whose prefixes ARE the hierarchy: no parent
pointers are stored anywhere, the id algebra carries everything.
"""

from hierclass import ancestors, child_mask, expand_gold, load_ene

o = load_ene()
print(f"{o.n_total} labels, {o.n_leaf} of them leaves, depth <= {o.max_depth}")

# every label's ancestor chain is just its dotted prefixes, root first
label = "1.10.4.1"
print(f"\nancestors of {label}:")
for anc in ancestors(o, label):
    print(f"  {anc:<10} {o.name(anc)}")

# gold sets are leaves; training the per-level head needs the whole chain.
# expand_gold unions the chains of every gold leaf.
gold = {"1.10.4.1", "1.4.2.1"}
expanded = expand_gold(o, gold)
print(f"\n{len(gold)} gold leaves expand to {len(expanded)} target labels:")
print(" ", sorted(expanded, key=lambda x: (x.count("."), x)))

# child masks drive the sequential decoder: at each step only direct
# children of the previous pick are scoreable
for node in ("1", "1.10", "1.10.4"):
    mask = child_mask(o, node)
    print(f"children of {node:<7} {int(mask.sum())}")

# the dense index maps are what heads size their weight matrices against
print(f"\nfull index covers {len(o.full_index)} labels, "
      f"leaf index {len(o.leaf_index)}")
print("first three leaves:", sorted(o.leaf_index, key=o.leaf_index.get)[:3])
