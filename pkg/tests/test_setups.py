import configparser

import pytest

from cdpauth.errors import ConfigError
from cdpauth.setups import SetupSpec, select_setups, setups_from_parser, standard_setups


def test_table_order_and_cells():
    setups = standard_setups("vpA", "vpB")
    assert [s.name for s in setups] == ["setup1_AA", "setup1_BA", "setup1_AB", "setup1_BB",
                                        "setup2_A", "setup2_B", "setup3"]
    aa = setups[0]
    assert (aa.d_train, aa.a_train, aa.test_cells) == (("vpA",), ("vpA",), (("vpA", "vpA"), ("vpA", "vpB")))
    assert setups[1].a_train == ("vpB",) and setups[1].d_train == ("vpA",)
    assert len(setups[-1].test_cells) == 4

def test_select():
    setups = standard_setups("vpA", "vpB")
    assert [s.name for s in select_setups(setups, "setup1_AA")] == ["setup1_AA"]
    assert len(select_setups(setups, "setup1")) == 4
    assert len(select_setups(setups, "all")) == 7
    with pytest.raises(ConfigError):
        select_setups(setups, "setup9")

def test_empty_attackers_rejected():
    with pytest.raises(ConfigError):
        SetupSpec("x", ("vpA",), (), (("vpA", "vpA"),))


def test_validate_reports_missing_printers():
    spec = standard_setups("vpA", "vpB")[-1]
    spec.validate(["vpA", "vpB"], ["vpA", "vpB"])
    with pytest.raises(ConfigError, match="vpB"):
        spec.validate(["vpA"], ["vpA", "vpB"])
    assert spec.printers() == {"vpA", "vpB"}


def test_custom_setups_from_ini():
    parser = configparser.ConfigParser()
    parser.read_string("[setup:cross]\nd_train = vpA\na_train = vpA, vpB\ntest_cells = vpA/vpB, vpB/vpA\n"
                       "[other]\nx = 1\n")
    (spec,) = setups_from_parser(parser)
    assert spec.name == "cross" and spec.a_train == ("vpA", "vpB")
    assert spec.test_cells == (("vpA", "vpB"), ("vpB", "vpA")) and spec.block == "custom"
    bad = configparser.ConfigParser()
    bad.read_string("[setup:x]\nd_train = vpA\na_train = vpA\n")
    with pytest.raises(ConfigError, match="missing key"):
        setups_from_parser(bad)
    bad.read_string("[setup:y]\nd_train = vpA\na_train = vpA\ntest_cells = vpA\n")
    with pytest.raises(ConfigError):
        setups_from_parser(bad)
