"""Build a few brick graphs by hand, check them and export one to LDraw."""
from legogen.lego import (Edge, LegoGraph, Orientation, canonical_key, check_validity,
                          implied_edges, rotate, to_ldraw)

X, Y = Orientation.ALONG_X, Orientation.ALONG_Y

# two bricks side by side, bridged by a third on top
bridge = LegoGraph([X, X, X], [Edge(0, 2, 2, 0), Edge(1, 2, -2, 0)])
# the second base shifted one stud left so it runs into the first
clash = LegoGraph([X, X, X], [Edge(0, 2, 2, 0), Edge(1, 2, -1, 0)])
# a stack of three whose top also claims to rest on the bottom: two heights at once
skip = LegoGraph([X, X, X], [Edge(0, 1, 0, 0), Edge(1, 2, 0, 0), Edge(0, 2, 0, 0)])
# a brick across the top of a two-brick stack
cap = LegoGraph([X, X, Y], [Edge(0, 1, 0, 0), Edge(1, 2, 1, -1)])

for name, g in [("bridge", bridge), ("clash", clash), ("skip", skip), ("cap", cap)]:
    r = check_validity(g)
    print(f"{name:7s} valid={r.valid} connected={r.connected} resolvable={r.resolvable} "
          f"collision_free={r.collision_free} offsets_connectable={r.offsets_connectable}")

# brick 2 rests on brick 1 too, but only the path through bricks 3 and 4 says so
arch = LegoGraph([X] * 5, [Edge(0, 2, 2, 0), Edge(1, 3, 2, 0), Edge(2, 4, 2, 0), Edge(3, 4, -2, 0)])
print("arch valid:", check_validity(arch).valid, "implied edges:", implied_edges(arch))
print("bridge key equals its quarter turn:", canonical_key(bridge) == canonical_key(rotate(bridge, 1)))
print(to_ldraw(bridge, seed=0))
