import pytest

from cellfuse.library import default_library_path, library_from_dict, load_library, truth_table


@pytest.fixture(scope="session")
def lib():
    return load_library(default_library_path("toy"))


@pytest.fixture(scope="session")
def alt_lib():
    return load_library(default_library_path("alt"))


@pytest.fixture(scope="session")
def mini_lib():
    cells = [
        {"name": "and2", "inputs": ["A", "B"], "output": "Y", "tt": "0001"},
        {"name": "or2", "inputs": ["A", "B"], "output": "Y", "tt": "0111"},
        {"name": "xor2_1", "inputs": ["A", "B"], "output": "Y", "tt": "0110"},
        {"name": "inv", "inputs": ["A"], "output": "Y", "tt": "10"},
        {"name": "buf", "inputs": ["A"], "output": "Y", "tt": "01"},
        {"name": "fa_sum", "inputs": ["A", "B", "C"], "output": "S",
         "tt": truth_table(lambda a, b, c: a ^ b ^ c, 3)},
    ]
    return library_from_dict({"cells": cells})


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
