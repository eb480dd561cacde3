"""SKILL.md parsing, canonical rendering, and content digests."""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from oracles import ref_digest, ref_render_skill
from skillclaw.errors import SkillMdError
from skillclaw.skillmd import (
    DEFAULT_CATEGORY,
    Skill,
    content_digest,
    digest_of_text,
    is_valid_slug,
    parse_skill_md,
    render_skill_md,
)

SKILL_FILES = sorted(
    (Path(__file__).parent / "data" / "skills").glob("*.md"))
assert len(SKILL_FILES) == 30


@pytest.mark.parametrize("path", SKILL_FILES, ids=[p.stem for p in SKILL_FILES])
def test_corpus_round_trips_bit_exact(path):
    text = path.read_text(encoding="utf-8")
    skill = parse_skill_md(text)
    assert render_skill_md(skill) == text
    # and the rendered form is a fixed point
    assert render_skill_md(parse_skill_md(render_skill_md(skill))) == \
        render_skill_md(skill)


@pytest.mark.parametrize("path", SKILL_FILES, ids=[p.stem for p in SKILL_FILES])
def test_corpus_digests_match_reference(path):
    text = path.read_text(encoding="utf-8")
    assert digest_of_text(text) == ref_digest(text)


def test_template_shape_file_parses():
    path = next(p for p in SKILL_FILES if p.stem == "01_template")
    skill = parse_skill_md(path.read_text(encoding="utf-8"))
    assert skill.name == "lowercase-hyphenated-slug"
    assert skill.category == "general"
    assert "NOT for:" in skill.description


# -- normalization -----------------------------------------------------------


def test_parse_normalizes_key_order_and_spacing():
    text = ("---\n"
            "category:  writing \n"
            "description:   Trigger wording.  \n"
            "unknown-key: kept verbatim\n"
            "\n"
            "name: reordered-skill\n"
            "---\n"
            "\n"
            "Body.\n")
    skill = parse_skill_md(text)
    assert skill == Skill(name="reordered-skill",
                          description="Trigger wording.",
                          body="Body.\n", category="writing",
                          extras=("unknown-key: kept verbatim",))
    assert render_skill_md(skill) == (
        "---\n"
        "name: reordered-skill\n"
        "description: Trigger wording.\n"
        "category: writing\n"
        "unknown-key: kept verbatim\n"
        "---\n"
        "\n"
        "Body.\n")


def test_category_defaults_when_absent():
    skill = parse_skill_md("---\nname: no-category\ndescription: d\n---\n\nB\n")
    assert skill.category == DEFAULT_CATEGORY


def test_digest_ignores_non_canonical_decoration():
    canonical = ref_render_skill("digest-check", "Desc.", "general", [],
                                 "Body line.\n")
    shuffled = ("---\n\ndescription: Desc.\n\ncategory: general\n"
                "name: digest-check\n---\n\nBody line.\n")
    assert digest_of_text(shuffled) == digest_of_text(canonical)
    assert digest_of_text(canonical) == ref_digest(canonical)


def test_content_digest_is_sha256_of_render():
    skill = Skill(name="digest-skill", description="D.", body="B.\n")
    assert content_digest(skill) == ref_digest(render_skill_md(skill))


def test_body_may_contain_delimiter_lines():
    body = "Above.\n---\nBelow the inner rule.\n"
    skill = Skill(name="inner-rule", description="D.", body=body)
    assert parse_skill_md(render_skill_md(skill)).body == body


# -- parse errors with line numbers ------------------------------------------


def test_missing_opening_delimiter():
    with pytest.raises(SkillMdError) as err:
        parse_skill_md("name: x\ndescription: y\n")
    assert err.value.line == 1


def test_unterminated_frontmatter():
    with pytest.raises(SkillMdError, match="never terminated") as err:
        parse_skill_md("---\nname: x\ndescription: y\n")
    assert err.value.line == 4


def test_missing_name_and_description():
    with pytest.raises(SkillMdError, match="missing the 'name'") as err:
        parse_skill_md("---\ndescription: y\n---\n\nB\n")
    assert err.value.line == 3
    with pytest.raises(SkillMdError, match="missing the 'description'"):
        parse_skill_md("---\nname: ok-name\n---\n\nB\n")


def test_invalid_slug_reports_its_line():
    with pytest.raises(SkillMdError, match="slug") as err:
        parse_skill_md("---\ndescription: y\nname: Bad_Name\n---\n\nB\n")
    assert err.value.line == 3


def test_duplicate_key_rejected():
    with pytest.raises(SkillMdError, match="duplicate") as err:
        parse_skill_md("---\nname: a-b\nname: c-d\ndescription: y\n---\n\nB\n")
    assert err.value.line == 3


def test_keyless_frontmatter_line_rejected():
    with pytest.raises(SkillMdError, match="no key separator") as err:
        parse_skill_md("---\nname: a-b\njust words\ndescription: y\n---\n\nB\n")
    assert err.value.line == 3


def test_empty_body_rejected():
    with pytest.raises(SkillMdError, match="body is empty"):
        parse_skill_md("---\nname: a-b\ndescription: y\n---\n")


# -- dataclass validation ----------------------------------------------------


def test_skill_validates_its_fields():
    with pytest.raises(ValueError, match="slug"):
        Skill(name="Not A Slug", description="d", body="b")
    with pytest.raises(ValueError, match="description"):
        Skill(name="ok-name", description="", body="b")
    with pytest.raises(ValueError, match="body"):
        Skill(name="ok-name", description="d", body="")
    with pytest.raises(ValueError, match="single line"):
        Skill(name="ok-name", description="two\nlines", body="b")
    with pytest.raises(ValueError, match="malformed"):
        Skill(name="ok-name", description="d", body="b",
              extras=("no separator here",))


@pytest.mark.parametrize("name,ok", [
    ("simple", True), ("two-words", True), ("x1-y2-z3", True), ("9lives", True),
    ("", False), ("Upper", False), ("under_score", False), ("-lead", False),
    ("trail-", False), ("double--dash", False), ("dot.name", False),
])
def test_slug_rule(name, ok):
    assert is_valid_slug(name) is ok


# -- property round trip -----------------------------------------------------

_slug_st = st.from_regex(r"[a-z0-9]{1,8}(-[a-z0-9]{1,8}){0,2}", fullmatch=True)
_line_st = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
    min_size=1, max_size=40).map(str.strip).filter(bool)
_body_st = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",),
                           blacklist_characters="\r"),
    min_size=1, max_size=200).filter(lambda t: bool(t.strip()))


@given(_slug_st, _line_st, _line_st, _body_st)
def test_render_parse_round_trip(name, description, category, body):
    skill = Skill(name=name, description=description, body=body,
                  category=category)
    text = render_skill_md(skill)
    parsed = parse_skill_md(text)
    assert parsed == skill
    assert render_skill_md(parsed) == text
    assert content_digest(parsed) == ref_digest(text)
