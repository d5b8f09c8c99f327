"""Netlist IR: PM netlists, AIGs, parsers, conversion and cone utilities."""
from .aiger import format_aiger, parse_aiger, parse_aiger_text
from .bench import format_netlist, parse_netlist, parse_netlist_text
from .cones import (cone_subcircuit, extract_subcircuit, full_fanin_cone, grow_fanin_region,
                    khop_fanin, remove_cone)
from .convert import pm_to_aig, pm_to_aig_mapped
from .graph import AND, NOT, PI, Aig, Circuit, ConeSpec, PmNetlist, build_ordered, induced

__all__ = [
    "AND", "NOT", "PI", "Aig", "Circuit", "ConeSpec", "PmNetlist", "build_ordered", "induced",
    "format_aiger", "parse_aiger", "parse_aiger_text", "format_netlist", "parse_netlist",
    "parse_netlist_text", "cone_subcircuit", "extract_subcircuit", "full_fanin_cone",
    "grow_fanin_region", "khop_fanin", "remove_cone", "pm_to_aig", "pm_to_aig_mapped",
]
