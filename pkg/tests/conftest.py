"""Shared fixtures: the planted corpus and an index built from it.

Both are expensive (a few seconds), so they are session scoped and every
test that needs retrieval-level behaviour reuses the same objects.  Tests
must not mutate them.
"""

import pytest

from dsm import QueryOptions, build_index, query

from corpus import make_planted_corpus


@pytest.fixture(scope="session")
def corpus():
    return make_planted_corpus()


@pytest.fixture(scope="session")
def corpus_index(corpus):
    return build_index(corpus["db_sets"], corpus["config"])


@pytest.fixture(scope="session")
def corpus_runs(corpus, corpus_index):
    """Rankings for all corpus queries under each pipeline stage."""

    cosine = {}
    spatial = {}
    diffusion = {}
    for tset in corpus["query_sets"]:
        qid = tset.image_id
        cosine[qid] = query(corpus_index, tset, QueryOptions(rerank_top=0))
        spatial[qid] = query(corpus_index, tset, QueryOptions())
        diffusion[qid] = query(corpus_index, tset, QueryOptions(diffuse=True))
    return {"cosine": cosine, "spatial": spatial, "diffusion": diffusion}
