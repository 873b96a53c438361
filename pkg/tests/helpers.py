"""Shared test fixtures: random taxonomy generation and tiny corpora."""

import numpy as np

TOY_LINES = "1\tName\n1.5\tLocation\n1.5.1\tGPE\n1.5.1.1\tCity\n"


def random_taxonomy(rng: np.random.Generator, max_depth: int = 4,
                    max_roots: int = 4, max_branch: int = 4) -> list[tuple[str, str]]:
    """Random prefix-closed taxonomy as (id, name) pairs.

    Branching narrows with depth; suffixes may start at 0 so zero-valued
    segments get exercised. Every parent of an emitted id is emitted.
    """
    nodes = []
    n_roots = int(rng.integers(1, max_roots + 1))
    frontier = [str(i + 1) for i in range(n_roots)]
    nodes.extend(frontier)
    depth = 1
    while frontier and depth < max_depth:
        nxt = []
        for parent in frontier:
            cap = max(0, max_branch - depth + 1)
            n_kids = int(rng.integers(0, cap + 1))
            base = int(rng.integers(0, 2))  # suffixes from 0 or from 1
            for j in range(n_kids):
                nxt.append(f"{parent}.{base + j}")
        nodes.extend(nxt)
        frontier = nxt
        depth += 1
    return [(i, "Node_" + i.replace(".", "_")) for i in nodes]


def taxonomy_text(pairs: list[tuple[str, str]], rng: np.random.Generator | None = None) -> str:
    """Render (id, name) pairs as TSV, optionally in shuffled line order."""
    lines = [f"{i}\t{n}" for i, n in pairs]
    if rng is not None:
        order = rng.permutation(len(lines))
        lines = [lines[k] for k in order]
    return "\n".join(lines) + "\n"


FLAT_LINES = "1\tA\n1.1\tB\n1.2\tC\n2\tD\n2.1\tE\n2.2\tF\n"
FLAT_LEAVES = ("1.1", "1.2", "2.1", "2.2")


def fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, component by component."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return grad


def make_pages(rng: np.random.Generator, counts: dict[str, int],
               leaves=FLAT_LEAVES, max_labels: int = 2):
    """Random pages per language with gold sets drawn from ``leaves``."""
    from hierclass.corpus import Page

    pages = []
    next_id = 1
    for lang in counts:
        for _ in range(counts[lang]):
            k = int(rng.integers(1, max_labels + 1))
            gold = rng.choice(len(leaves), size=k, replace=False)
            pages.append(Page(
                page_id=next_id,
                lang=lang,
                text=f"page {next_id} text",
                gold=frozenset(leaves[g] for g in gold),
            ))
            next_id += 1
    return pages
