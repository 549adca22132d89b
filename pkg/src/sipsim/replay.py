"""Mock scripts that make a simulation reproduce a labeled corpus.

Each corpus item becomes the scripted action of its author at its step, and
the ``Annotate`` response for that (agent, step) carries the item's labels.
Every other (agent, step) falls through to a wildcard ``do_nothing()``.
"""
from __future__ import annotations

from typing import Callable, Iterable

from .backend import ScriptEntry
from .dataset import EventCorpus
from .domain import AgentAction, ContentItem, Labels, Post, Reply, Retweet, Stance
from .parser import render_action

SIP_RESPONSE = (
    "[Cue] The feed shows the ongoing discussion of the event.\n"
    "[Interpret] Others are sharing positions about the event.\n"
    "[Goal] I want to express my own view.\n"
    "[Retrieve] I can post, reply, retweet or stay silent.\n"
    "[Evaluate] Acting in line with my stance fits my goal."
)
IDLE_RESPONSE = "[OPTION 4] Thought: [Evaluate] Nothing here calls for a response. -> Action: do_nothing()"

STANCE_CYCLE = {Stance.SUPPORT: Stance.NEUTRAL, Stance.NEUTRAL: Stance.OPPOSE, Stance.OPPOSE: Stance.SUPPORT}


def action_for(item: ContentItem, by_id: dict[str, ContentItem]) -> AgentAction:
    if item.parent_id is not None:
        parent = by_id[item.parent_id]
        return Reply(item.text, parent.author_id, parent.item_id)
    if item.quoted_id is not None:
        orig = by_id[item.quoted_id]
        return Retweet(item.text, orig.author_id, orig.item_id, orig.text)
    return Post(item.text)


def action_response(action: AgentAction) -> str:
    option = {"post": 1, "reply": 2, "retweet": 3}[action.function]
    return f"[OPTION {option}] Thought: [Goal] I want to take part in the discussion. -> Action: {render_action(action)}"


def label_response(labels: Labels) -> str:
    return f"stance: {labels.stance.value}\ncontent_type: {labels.content_type}\nemotion: {labels.emotion}"


def flip_every(n: int) -> Callable[[int, ContentItem], bool]:
    """Selector for every ``n``-th labeled item (0, n, 2n, ...) in replay order."""
    return lambda index, item: index % n == 0


def replay_script(
    corpus: EventCorpus,
    flip_stance: Callable[[int, ContentItem], bool] | None = None,
) -> list[ScriptEntry]:
    """Script entries that replay ``corpus`` through the engine.

    ``flip_stance(index, item)`` selects items whose annotated stance is
    rotated support -> neutral -> oppose -> support; ``index`` counts labeled
    items in (step, author) order.
    """
    by_id = corpus.by_id()
    entries = [
        ScriptEntry("*", "*", "SipAnalysis", SIP_RESPONSE),
        ScriptEntry("*", "*", "ActionSelect", IDLE_RESPONSE),
    ]
    index = 0
    for item in replay_items(corpus.items):
        entries.append(ScriptEntry(item.author_id, item.step, "ActionSelect", action_response(action_for(item, by_id))))
        if item.labels is None:
            continue
        labels = item.labels
        if flip_stance is not None and flip_stance(index, item):
            labels = Labels(STANCE_CYCLE[labels.stance], labels.content_type, labels.emotion)
        entries.append(ScriptEntry(item.author_id, item.step, "Annotate", label_response(labels)))
        index += 1
    return entries


def replay_items(items: Iterable[ContentItem]) -> list[ContentItem]:
    """Items in replay order; every item needs a step and at most one item per (author, step)."""
    seen = set()
    out = []
    for it in sorted(items, key=lambda it: (it.step if it.step is not None else -1, it.author_id)):
        if it.step is None:
            raise ValueError(f"item {it.item_id} has no step; cannot replay")
        key = (it.author_id, it.step)
        if key in seen:
            raise ValueError(f"{it.author_id} has two items at step {it.step}; cannot replay")
        seen.add(key)
        out.append(it)
    return out
