"""Named random streams derived from one master seed.

Each concern draws from its own generator so that, for example, switching
incidents on does not shift the demand realisation of a paired run.
"""

import numpy as np

STREAMS = ("demand", "incidents", "awareness", "rerouting", "control")


def make_streams(seed: int, episode: int = 0) -> dict[str, np.random.Generator]:
    return {
        name: np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(episode), k)))
        for k, name in enumerate(STREAMS)
    }
