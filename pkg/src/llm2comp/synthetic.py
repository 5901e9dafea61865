"""Templated toy corpora with topic structure, paraphrases and graded-noise pairs.

Every sentence fills four slots (subject, verb, object, place) from one topic.
Each slot word has a synonym, and several templates realize the same slots,
so paraphrases share meaning without sharing most of their bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# topic -> slot -> [(word, synonym), ...]
TOPICS: dict[str, dict[str, list[tuple[str, str]]]] = {
    "animals": {
        "subj": [("dog", "hound"), ("cat", "kitten"), ("horse", "pony"), ("bird", "sparrow"), ("fox", "vixen")],
        "verb": [("chased", "pursued"), ("watched", "observed"), ("found", "discovered"), ("bit", "nipped"), ("followed", "trailed")],
        "obj": [("rabbit", "bunny"), ("mouse", "rodent"), ("squirrel", "chipmunk"), ("lamb", "sheep"), ("duck", "mallard")],
        "place": [("barn", "stable"), ("meadow", "field"), ("forest", "woods"), ("pond", "lake"), ("den", "burrow")],
    },
    "cooking": {
        "subj": [("chef", "cook"), ("baker", "pastry maker"), ("waiter", "server"), ("grandma", "granny"), ("student", "pupil")],
        "verb": [("baked", "roasted"), ("chopped", "diced"), ("stirred", "mixed"), ("tasted", "sampled"), ("served", "plated")],
        "obj": [("bread", "loaf"), ("soup", "broth"), ("onion", "shallot"), ("cake", "pastry"), ("pasta", "noodles")],
        "place": [("kitchen", "galley"), ("bakery", "patisserie"), ("oven", "stove"), ("diner", "cafe"), ("pantry", "larder")],
    },
    "space": {
        "subj": [("astronaut", "cosmonaut"), ("rover", "probe"), ("pilot", "aviator"), ("satellite", "orbiter"), ("scientist", "researcher")],
        "verb": [("launched", "fired"), ("orbited", "circled"), ("scanned", "surveyed"), ("landed", "touched down"), ("tracked", "monitored")],
        "obj": [("rocket", "missile"), ("comet", "asteroid"), ("moon", "satellite body"), ("planet", "world"), ("star", "sun")],
        "place": [("station", "outpost"), ("crater", "basin"), ("galaxy", "nebula"), ("orbit", "trajectory"), ("observatory", "telescope dome")],
    },
    "music": {
        "subj": [("singer", "vocalist"), ("drummer", "percussionist"), ("band", "group"), ("pianist", "keyboardist"), ("choir", "chorus")],
        "verb": [("played", "performed"), ("recorded", "taped"), ("composed", "wrote"), ("rehearsed", "practiced"), ("sang", "chanted")],
        "obj": [("song", "tune"), ("melody", "theme"), ("album", "record"), ("symphony", "concerto"), ("ballad", "anthem")],
        "place": [("studio", "booth"), ("concert hall", "auditorium"), ("club", "venue"), ("stage", "platform"), ("festival", "fair")],
    },
    "sports": {
        "subj": [("striker", "forward"), ("coach", "trainer"), ("goalie", "keeper"), ("runner", "sprinter"), ("captain", "skipper")],
        "verb": [("kicked", "booted"), ("threw", "tossed"), ("caught", "grabbed"), ("won", "clinched"), ("blocked", "stopped")],
        "obj": [("ball", "football"), ("trophy", "cup"), ("match", "game"), ("pass", "cross"), ("medal", "prize")],
        "place": [("stadium", "arena"), ("pitch", "ground"), ("gym", "court"), ("track", "course"), ("locker room", "dressing room")],
    },
    "weather": {
        "subj": [("storm", "tempest"), ("wind", "gale"), ("rain", "downpour"), ("fog", "mist"), ("snow", "blizzard")],
        "verb": [("flooded", "swamped"), ("battered", "pounded"), ("covered", "blanketed"), ("cooled", "chilled"), ("soaked", "drenched")],
        "obj": [("valley", "dale"), ("harbor", "port"), ("highway", "motorway"), ("village", "hamlet"), ("coast", "shore")],
        "place": [("north", "uplands"), ("mountains", "peaks"), ("desert", "dunes"), ("islands", "archipelago"), ("plains", "prairie")],
    },
    "finance": {
        "subj": [("banker", "financier"), ("investor", "shareholder"), ("trader", "broker"), ("auditor", "accountant"), ("manager", "director")],
        "verb": [("bought", "purchased"), ("sold", "traded"), ("audited", "inspected"), ("funded", "financed"), ("valued", "appraised")],
        "obj": [("stock", "share"), ("bond", "debenture"), ("loan", "credit"), ("fund", "portfolio"), ("company", "firm")],
        "place": [("bank", "lender"), ("market", "exchange"), ("office", "bureau"), ("vault", "safe"), ("boardroom", "council room")],
    },
    "travel": {
        "subj": [("tourist", "traveler"), ("guide", "escort"), ("hiker", "trekker"), ("sailor", "mariner"), ("driver", "chauffeur")],
        "verb": [("visited", "toured"), ("booked", "reserved"), ("crossed", "traversed"), ("explored", "roamed"), ("mapped", "charted")],
        "obj": [("castle", "fortress"), ("bridge", "viaduct"), ("temple", "shrine"), ("ferry", "boat"), ("museum", "gallery")],
        "place": [("city", "town"), ("harbor town", "port town"), ("valley road", "mountain pass"), ("old quarter", "historic center"), ("border", "frontier")],
    },
}
TOPIC_NAMES = sorted(TOPICS)
SLOTS = ("subj", "verb", "obj", "place")
TEMPLATES = (
    "the {subj} {verb} the {obj} in the {place}.",
    "in the {place}, the {subj} {verb} the {obj}.",
    "the {obj} was {verb} by the {subj} in the {place}.",
)


@dataclass(frozen=True)
class Frame:
    """A sentence meaning: topic plus one (word index) per slot."""

    topic: str
    picks: tuple[tuple[str, int], ...]  # (topic the word comes from, index) per slot

    def render(self, template: int, synonyms: tuple[bool, ...]) -> str:
        words = {}
        for slot, (topic, idx), syn in zip(SLOTS, self.picks, synonyms):
            words[slot] = TOPICS[topic][slot][idx][1 if syn else 0]
        return TEMPLATES[template].format(**words)


def random_frame(rng: np.random.Generator, topic: str | None = None) -> Frame:
    topic = topic or TOPIC_NAMES[rng.integers(len(TOPIC_NAMES))]
    picks = tuple((topic, int(rng.integers(len(TOPICS[topic][s])))) for s in SLOTS)
    return Frame(topic, picks)


def render_random(frame: Frame, rng: np.random.Generator) -> str:
    return frame.render(int(rng.integers(len(TEMPLATES))),
                        tuple(bool(b) for b in rng.integers(0, 2, size=len(SLOTS))))


def paraphrase(frame: Frame, text_template: int, rng: np.random.Generator) -> str:
    """Same frame under a different template with every slot word swapped for its synonym."""
    others = [t for t in range(len(TEMPLATES)) if t != text_template]
    return frame.render(int(rng.choice(others)), (True,) * len(SLOTS))


def perturb(frame: Frame, n_changes: int, rng: np.random.Generator, same_topic: bool = False) -> Frame:
    """Replace ``n_changes`` slots with words from another topic (or the same topic)."""
    slots = rng.choice(len(SLOTS), size=n_changes, replace=False)
    picks = list(frame.picks)
    for s in slots:
        slot = SLOTS[s]
        if same_topic:
            topic = frame.topic
            choices = [i for i in range(len(TOPICS[topic][slot])) if i != picks[s][1]]
            picks[s] = (topic, int(rng.choice(choices)))
        else:
            topic = TOPIC_NAMES[rng.choice([i for i, t in enumerate(TOPIC_NAMES) if t != frame.topic])]
            picks[s] = (topic, int(rng.integers(len(TOPICS[topic][slot]))))
    return Frame(frame.topic, tuple(picks))


def make_corpus(n: int, rng: np.random.Generator) -> list[str]:
    return [render_random(random_frame(rng), rng) for _ in range(n)]


def make_sts(n_pairs: int, rng: np.random.Generator) -> tuple[list[tuple[str, str]], list[dict]]:
    """Pairs whose gold score (0..4) is the number of slots kept from the first sentence.

    The second sentence is re-rendered with a random template and random synonym
    choices, so it paraphrases the kept slots with partial byte overlap.
    """
    texts, rows = [], []
    for i in range(n_pairs):
        frame = random_frame(rng)
        tpl = int(rng.integers(len(TEMPLATES)))
        first = frame.render(tpl, (False,) * len(SLOTS))
        changes = i % (len(SLOTS) + 1)
        second = render_random(perturb(frame, changes, rng), rng)
        a, b = f"sts{i}a", f"sts{i}b"
        texts += [(a, first), (b, second)]
        rows.append({"id1": a, "id2": b, "score": float(len(SLOTS) - changes)})
    return texts, rows


def make_triples(n: int, rng: np.random.Generator, n_negatives: int = 1) -> list[dict]:
    out = []
    for _ in range(n):
        frame = random_frame(rng)
        tpl = int(rng.integers(len(TEMPLATES)))
        query = frame.render(tpl, tuple(bool(b) for b in rng.integers(0, 2, size=len(SLOTS))))
        positive = paraphrase(frame, tpl, rng)
        negatives = [render_random(perturb(frame, int(rng.integers(2, 5)), rng, same_topic=True), rng)
                     for _ in range(n_negatives)]
        out.append({"query": query, "positive": positive, "negatives": negatives})
    return out


def make_topic_labels(n: int, rng: np.random.Generator, prefix: str) -> tuple[list[tuple[str, str]], list[dict]]:
    texts, rows = [], []
    for i in range(n):
        topic = TOPIC_NAMES[i % len(TOPIC_NAMES)]
        key = f"{prefix}{i}"
        texts.append((key, render_random(random_frame(rng, topic), rng)))
        rows.append({"id": key, "label": topic})
    return texts, rows


def make_ranking(n_queries: int, n_candidates: int, rng: np.random.Generator,
                 prefix: str) -> tuple[list[tuple[str, str]], list[dict]]:
    """Each query has one paraphrase (relevance 2), one near miss (1) and distractors (0)."""
    texts, rows = [], []
    for q in range(n_queries):
        frame = random_frame(rng)
        tpl = int(rng.integers(len(TEMPLATES)))
        qid = f"{prefix}{q}q"
        texts.append((qid, frame.render(tpl, (False,) * len(SLOTS))))
        cands = [(paraphrase(frame, tpl, rng), 2.0),
                 (render_random(perturb(frame, 2, rng, same_topic=True), rng), 1.0)]
        while len(cands) < n_candidates:
            cands.append((render_random(random_frame(rng), rng), 0.0))
        order = rng.permutation(len(cands))
        ids, rel = [], []
        for j in order:
            cid = f"{prefix}{q}c{j}"
            texts.append((cid, cands[j][0]))
            ids.append(cid)
            rel.append(cands[j][1])
        rows.append({"query_id": qid, "candidate_ids": ids, "relevance": rel})
    return texts, rows


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def toy_stage_configs(steps: tuple[int, int, int] = (300, 150, 150),
                      seed: int = 0) -> dict[str, dict]:
    model = {"n_layers": 4, "d_model": 64, "n_heads": 4, "d_ff": 256, "max_seq_len": 256,
             "n_memory_tokens": 8}
    common = {"seed": seed, "k": 8, "model": model, "warmup_steps": 10}
    return {
        "pretext": {**common, "stage": "pretext", "objective": "ctkd", "steps": steps[0],
                    "batch_size": 4, "lr": 1e-3, "data_path": "corpus.txt",
                    "base_lm_steps": 300},
        "ucl": {**common, "stage": "ucl", "steps": steps[1], "batch_size": 8, "lr": 1e-4,
                "data_path": "corpus.txt"},
        "scl": {**common, "stage": "scl", "steps": steps[2], "batch_size": 8, "lr": 3e-4,
                "data_path": "triples.jsonl"},
    }


def make_toy_data(outdir: str | Path, seed: int = 0) -> None:
    """Write the bundled toy corpus, evaluation sets and stage configs into ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    (out / "corpus.txt").write_text("\n".join(make_corpus(500, rng)) + "\n", encoding="utf-8")
    _write_jsonl(out / "triples.jsonl", make_triples(400, rng))
    texts: list[tuple[str, str]] = []
    sts_texts, sts_rows = make_sts(100, rng)
    clu_texts, clu_rows = make_topic_labels(80, rng, "clu")
    cls_texts, cls_rows = make_topic_labels(80, rng, "cls")
    ret_texts, ret_rows = make_ranking(20, 10, rng, "ret")
    rr_texts, rr_rows = make_ranking(20, 10, rng, "rr")
    for t in (sts_texts, clu_texts, cls_texts, ret_texts, rr_texts):
        texts += t
    (out / "texts.txt").write_text("".join(f"{i}\t{t}\n" for i, t in texts), encoding="utf-8")
    _write_jsonl(out / "sts.jsonl", sts_rows)
    _write_jsonl(out / "clustering.jsonl", clu_rows)
    _write_jsonl(out / "classify.jsonl", cls_rows)
    _write_jsonl(out / "retrieval.jsonl", ret_rows)
    _write_jsonl(out / "rerank.jsonl", rr_rows)
    for name, cfg in toy_stage_configs().items():
        (out / f"{name}.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
