import threading

import numpy as np
import pytest

from kgate.corpus import DialogueSample, TripleKB
from kgate.encode import HashedBowProvider
from kgate.graph import unify_triples
from kgate.layers import Dims, init_params
from kgate.selector import SelectorConfig, clear_caches
from kgate.training import TrainConfig, train

FILM_TRIPLES = (
    ("Zero Dark Thirty", "written_by", "Mark Boal"),
    ("Zero Dark Thirty", "has_genre", "War film"),
    ("Zero Dark Thirty", "directed_by", "Kathryn Bigelow"),
    ("Zero Dark Thirty", "release_year", "2012"),
    ("Mark Boal", "profession", "Journalist"),
    ("Kathryn Bigelow", "directed", "The Hurt Locker"),
    ("The Hurt Locker", "written_by", "Mark Boal"),
    ("The Hurt Locker", "release_year", "2008"),
    ("Paper Towns", "written_by", "John Green"),
    ("Paper Towns", "release_year", "2008"),
    ("John Green", "wrote", "The Fault in Our Stars"),
)


def film_corpus():
    turns = [
        ("who wrote Zero Dark Thirty", "fact:Zero Dark Thirty|written_by|Mark Boal"),
        ("what genre is Zero Dark Thirty", "fact:Zero Dark Thirty|has_genre|War film"),
        ("who directed Zero Dark Thirty", "fact:Zero Dark Thirty|directed_by|Kathryn Bigelow"),
        ("when was Zero Dark Thirty released", "fact:Zero Dark Thirty|release_year|2012"),
        ("who wrote The Hurt Locker", "fact:The Hurt Locker|written_by|Mark Boal"),
        ("when was The Hurt Locker released", "fact:The Hurt Locker|release_year|2008"),
        ("who wrote Paper Towns", "fact:Paper Towns|written_by|John Green"),
        ("when was Paper Towns released", "fact:Paper Towns|release_year|2008"),
        ("what profession is Mark Boal", "fact:Mark Boal|profession|Journalist"),
        ("what did John Green write", "fact:John Green|wrote|The Fault in Our Stars"),
        ("what did Kathryn Bigelow direct", "fact:Kathryn Bigelow|directed|The Hurt Locker"),
    ]
    samples = []
    for i, (utterance, gold) in enumerate(turns):
        head = gold.split("fact:")[1].split("|")[0]
        samples.append(
            DialogueSample(
                id=f"film{i:02d}",
                history=("I have been watching movies lately",),
                utterance=utterance,
                gold_knowledge=(gold,),
                gold_path=(f"ent:{head}",),
                start_node=f"ent:{head}",
            )
        )
    return samples


@pytest.fixture(scope="session")
def film_bundle():
    """A small trained model over the film KB; shared across test modules."""
    clear_caches()
    graph = unify_triples(TripleKB(triples=FILM_TRIPLES))
    provider = HashedBowProvider(dim=64)
    dims = Dims(d_in=64, d_state=64, d_hidden=32, heads=2)
    config = TrainConfig(
        epochs=20,
        batch_size=2,
        rollouts_per_sample=4,
        max_lr=5e-3,
        warmup_frac=0.15,
        seed=11,
        dims=dims,
        holdout_frac=0.0,
        reward_baseline=True,
        selector=SelectorConfig(traversal="sampled", t_max=2),
    )
    params, _report = train(graph, film_corpus(), provider, config)
    clear_caches()
    return graph, params, provider, SelectorConfig(t_max=2)
