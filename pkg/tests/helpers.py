"""Independent scalar reference evaluators used as test oracles."""
import itertools

from cellfuse.netlist import AND, NOT, PI, Aig


def eval_scalar(circuit, lib, assignment):
    """Evaluate every node for one ``{pi_name: bit}`` assignment."""
    val = {}
    for i, kind in enumerate(circuit.kinds):
        ins = [val[j] for j in circuit.fanins[i]]
        if kind == PI:
            val[i] = assignment[circuit.names[i]]
        elif isinstance(circuit, Aig):
            val[i] = (ins[0] & ins[1]) if kind == AND else 1 - ins[0]
        else:
            row = int("".join(map(str, ins)), 2)
            val[i] = int(lib[kind].tt[row])
    return val


def output_table(circuit, lib, pi_names):
    rows = []
    for bits in itertools.product((0, 1), repeat=len(pi_names)):
        val = eval_scalar(circuit, lib, dict(zip(pi_names, bits)))
        rows.append(tuple(val[o] for o in sorted(circuit.outputs, key=lambda o: circuit.output_names[circuit.outputs.index(o)])))
    return rows


def outputs_by_name(circuit, lib, pi_names):
    table = []
    for bits in itertools.product((0, 1), repeat=len(pi_names)):
        val = eval_scalar(circuit, lib, dict(zip(pi_names, bits)))
        table.append({n: val[o] for n, o in zip(circuit.output_names, circuit.outputs)})
    return table


def ancestors(circuit, node):
    """Transitive fan-in of ``node`` (excluding itself) by explicit closure."""
    reach = [set() for _ in circuit.names]
    for i, fin in enumerate(circuit.fanins):
        for j in fin:
            reach[i] |= {j} | reach[j]
    return reach[node]


def structure_key(circuit):
    """Numbering-free isomorphism key: PIs by name, gates by recursive shape."""
    h = []
    for i, kind in enumerate(circuit.kinds):
        if kind == PI:
            h.append(("PI", circuit.names[i]))
        else:
            kids = [h[j] for j in circuit.fanins[i]]
            if kind == AND:
                kids = sorted(kids)
            h.append((kind, tuple(kids)))
    return sorted(map(repr, h)), sorted(zip(circuit.output_names, (repr(h[o]) for o in circuit.outputs)))


# criterion number -> PASS/FAIL line, printed in the terminal summary
ACCEPTANCE = {}
