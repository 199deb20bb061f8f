"""Session service instance for the console's end-to-end tests.

Builds a 20-lap desk context with a small network and a quickly fitted
surrogate tree (labelled by the network's own greedy actions), then serves
on the port given as argv[1].
"""

import sys

import numpy as np
import uvicorn

from racestrat.env import RaceEnv
from racestrat.baselines import (HeuristicParams, heuristic_policy,
                                 load_strategy_pool, scale_plan)
from racestrat.network import QNetwork
from racestrat.server import ServerContext, create_app
from racestrat.state import FEATURE_NAMES, calibrate_scaling
from racestrat.track import desk_track
from racestrat.xai.cart import fit_cart


def build_context() -> ServerContext:
    config = desk_track("BHR", 20)
    pool = [scale_plan(p, 57, 20) for p in load_strategy_pool("BHR")]
    profile = calibrate_scaling(config, n_sims=50, seed=0)
    net = QNetwork.init(len(FEATURE_NAMES), 16, seed=0, output_scale=1000.0)
    # bias the untrained head towards staying out so scripted sessions cannot
    # terminate early on an invalid pit before the test gets to act
    net.params["b2"][0] += 5.0

    # surrogate tree labelled by the rule-based strategy on real rollouts
    params = HeuristicParams()
    xs, ys = [], []
    for seed in range(4):
        env = RaceEnv(config, profile, seed, opponent_pool=pool,
                      model_key="tree")
        x = env.reset()
        done = False
        while not done:
            action = heuristic_policy(env.prev_state, params)
            xs.append(x)
            ys.append(int(action))
            x, _, done, _ = env.step(action)
    tree = fit_cart(np.array(xs), np.array(ys), max_depth=3)

    return ServerContext(net=net, profile=profile, tree=tree,
                         configs={"BHR": config}, pools={"BHR": pool})


if __name__ == "__main__":
    port = int(sys.argv[1]) if len(sys.argv) > 1 else 8099
    uvicorn.run(create_app(build_context()), host="127.0.0.1", port=port,
                log_level="warning")
