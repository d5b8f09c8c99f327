"""Fan-in regions: k-hop cones, full cones, sub-circuit sampling, cone removal."""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from ..errors import NetlistError
from .graph import PI, Circuit, ConeSpec, PmNetlist, induced


def _boundary(circuit: Circuit, members) -> frozenset:
    return frozenset(j for i in members for j in circuit.fanins[i] if j not in members)


def khop_fanin(circuit: Circuit, p, k: float) -> ConeSpec:
    """``p`` plus every node within ``k`` reverse edges of it."""
    root = circuit.node_id(p)
    if k < 1:
        raise ValueError("k must be >= 1")
    depth = {root: 0}
    queue = deque([root])
    while queue:
        i = queue.popleft()
        if depth[i] >= k:
            continue
        for j in circuit.fanins[i]:
            if j not in depth:
                depth[j] = depth[i] + 1
                queue.append(j)
    members = frozenset(depth)
    return ConeSpec(root, members, _boundary(circuit, members))


def full_fanin_cone(circuit: Circuit, p) -> ConeSpec:
    cone = khop_fanin(circuit, p, math.inf)
    return ConeSpec(cone.root, cone.members, frozenset())


def grow_fanin_region(circuit: Circuit, root: int, max_nodes: int) -> tuple[list[int], frozenset] | None:
    """Reverse-BFS from ``root`` keeping ``|members| + |boundary| <= max_nodes``.

    Boundary nodes are the cut points that will become fresh PIs.  Returns
    None when even the root and its direct fanins do not fit.
    """
    members = {root}
    boundary = dict.fromkeys(j for j in circuit.fanins[root])
    if 1 + len(boundary) > max_nodes:
        return None
    queue = deque(boundary)
    while queue:
        j = queue.popleft()
        new = [f for f in dict.fromkeys(circuit.fanins[j]) if f not in members and f not in boundary]
        if len(members) + len(boundary) + len(new) > max_nodes:
            continue
        del boundary[j]
        members.add(j)
        for f in new:
            boundary[f] = None
            queue.append(f)
    return sorted(members), frozenset(boundary)


def cone_subcircuit(circuit: Circuit, root, max_nodes: int | None = None):
    """Fan-in cone of ``root`` as a standalone circuit with ``root`` as its output.

    With ``max_nodes`` the cone is truncated by reverse BFS and cut
    fanins become PIs.
    """
    root = circuit.node_id(root)
    if max_nodes is None:
        members = sorted(full_fanin_cone(circuit, root).members)
        cut = frozenset()
    else:
        grown = grow_fanin_region(circuit, root, max_nodes)
        if grown is None:
            raise NetlistError(f"cone of {circuit.names[root]!r} does not fit in {max_nodes} nodes")
        members, cut = grown
    return induced(circuit, set(members) | cut, outputs=[root], as_pi=cut)


def extract_subcircuit(net: PmNetlist, max_nodes: int, seed: int) -> PmNetlist:
    """Random closed sub-circuit of at most ``max_nodes`` nodes.

    A root is drawn among the cells (PIs only if there are none) and its
    fan-in region is grown by reverse BFS; cut fanins become fresh PIs that
    keep their original names.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if len(net) == 0:
        raise NetlistError("cannot extract a sub-circuit from an empty netlist")
    candidates = np.array(net.gates or net.pis)
    rng = np.random.default_rng(seed)
    for root in rng.permutation(candidates):
        grown = grow_fanin_region(net, int(root), max_nodes)
        if grown is not None:
            members, cut = grown
            return induced(net, set(members) | cut, outputs=[int(root)], as_pi=cut)
    raise NetlistError(f"no node's fan-in fits in max_nodes={max_nodes}")


def remove_cone(net: PmNetlist, cone: ConeSpec) -> PmNetlist:
    """Delete ``cone`` from ``net``, keeping logic that still drives something else.

    The root is always deleted.  Another member survives if it is a declared
    output or feeds a surviving node.  If the root fed surviving nodes, a PI
    with the root's name takes its place so the patch point stays addressable.
    """
    root = cone.root
    members = set(cone.members)
    if root not in members or any(not 0 <= m < len(net) for m in members):
        raise NetlistError("cone does not belong to this netlist")
    if net.kinds[root] == PI and list(net.outputs) == [root]:
        raise NetlistError("cone root is a PI used as the only output")
    outputs = set(net.outputs)
    deleted = {root}
    # Reverse topological sweep: a node's fanouts are decided before it is.
    for i in sorted(members, reverse=True):
        if i == root:
            continue
        if i in outputs:
            continue
        if all(f in deleted for f in net.fanouts[i]):
            deleted.add(i)
    keep = [i for i in range(len(net)) if i not in deleted]
    root_users = [f for f in net.fanouts[root] if f not in deleted]
    as_pi = set()
    if root_users:
        keep.append(root)
        as_pi.add(root)
    new_outputs = [o for o in net.outputs if o not in deleted]
    return induced(net, keep, outputs=new_outputs, as_pi=as_pi)
