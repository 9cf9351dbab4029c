import pytest
from pydantic import ValidationError

from faultsim.core import BoundaryKind, EdgeTag


@pytest.mark.parametrize(
    "tag, text",
    [
        (EdgeTag.dirichlet(), "dirichlet"),
        (EdgeTag.dirichlet(driven=True), "dirichlet:driven"),
        (EdgeTag.neumann(), "neumann"),
        (EdgeTag.fault_bottom(3), "fault_bottom:3"),
        (EdgeTag.fault_top(1), "fault_top:1"),
    ],
)
def test_edge_tag_text(tag, text):
    assert str(tag) == text
    assert EdgeTag.from_string(text) == tag


def test_edge_tag_faults():
    assert EdgeTag.fault_top(2).is_fault
    assert not EdgeTag.dirichlet(driven=True).is_fault


@pytest.mark.parametrize(
    "content, message",
    [
        ({"kind": "fault_bottom"}, "needs an interface"),
        ({"kind": "neumann", "interface": 1}, "cannot carry"),
        ({"kind": "neumann", "driven": True}, "Only dirichlet"),
        ({"kind": "slippery"}, "kind"),
    ],
)
def test_edge_tag_validation(content, message):
    with pytest.raises(ValidationError, match=message):
        EdgeTag(**content)


def test_edge_tag_from_yaml_content():
    tag = EdgeTag.model_validate({"kind": "dirichlet", "driven": True})
    assert tag.kind == BoundaryKind.DIRICHLET
    assert tag.driven
