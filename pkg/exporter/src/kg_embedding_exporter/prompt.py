"""Instruction prompt assembly, segmented so token spans stay recoverable."""

from __future__ import annotations

from dataclasses import dataclass

PROMPT_PREFIX = (
    "### Instruction\n"
    "Suppose that you are an excellent linguist studying a three-word language. "
    "Given the following dictionary:\n"
    "Input Type Description\n"
)


@dataclass(frozen=True)
class PromptSegments:
    """The prompt split into pieces; the entity/relation description pieces
    are tracked so their token spans can be pooled after tokenization."""

    pieces: tuple[str, ...]
    entity_piece: int  # index of the head-entity description piece
    relation_piece: int  # index of the relation description piece

    @property
    def text(self) -> str:
        return "".join(self.pieces)


def build_prompt(entity_text: str, relation_text: str) -> PromptSegments:
    pieces = (
        PROMPT_PREFIX + "<kgl: ",
        entity_text,
        "> Head entity ",
        entity_text,
        "\n<kgl: ",
        relation_text,
        "> Relation ",
        relation_text,
        "\nPlease complete the last word (?) of the sentence: "
        f"<kgl: {entity_text}><kgl: {relation_text}>?\n\n"
        "### Response:\n"
        f"<kgl: {entity_text}><kgl: ",
        relation_text,
        ">",
    )
    return PromptSegments(pieces=pieces, entity_piece=3, relation_piece=7)
