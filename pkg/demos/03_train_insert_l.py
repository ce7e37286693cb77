# coding: utf-8

# # Learning to insert an L-block from ten demonstrations
#
# Usage: python3 03_train_insert_l.py [steps] [out_dir]
#
# Losses sit near their uniform values for the first ~300 steps, then fall
# quickly; validation success usually reaches 0.9 around step 1100.
# Heatmaps of the trained model are written to out_dir.

import sys
import time

import numpy as np

from equitransporter.ravens import generate
from equitransporter.training import RunConfig, agent_policy, evaluate_policy, make_demos, split_seeds, train
from equitransporter.transporter import ModelConfig, TransporterAgent, export_maps

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
out_dir = sys.argv[2] if len(sys.argv) > 2 else "insert_l_maps"

# ## Data
#
# Each scene is 2 x 64 x 64: the block mask and the target outline.  The
# scripted expert grasps the block at its origin and places it on the target.

cfg = RunConfig(task="insert-L", demos=10, n=8, steps=steps)
demos = make_demos(cfg.task, split_seeds("train", cfg.seed, cfg.demos))
d = demos[0]
print("demo 0: pick", (d.pick.u, d.pick.v, round(d.pick.theta, 3)),
      "place", (d.place.u, d.place.v, round(d.place.theta, 3)))

# ## Training
#
# One demonstration per step, three cross-entropy losses, Adam at 1e-4.
# Validation success is measured every 100 steps on held-out scenes.

agent = TransporterAgent(ModelConfig(n=cfg.n, lr=cfg.lr))
t = time.time()


def progress(step, losses):
    if step % 100 == 0:
        print("step %4d  pick %.3f  angle %.3f  place %.3f  (%.0fs)"
              % (step, losses["pick"], losses["angle"], losses["place"], time.time() - t))


res = train(agent, demos, cfg, progress)
print("validation curve:", res.curve)

# ## Held-out evaluation with the best validated weights

agent.load_state(res.best_state)
results = evaluate_policy(agent_policy(agent), cfg.task, split_seeds("test", cfg.seed, 20))
print("test success %.2f, mean translation error %.2f px"
      % (np.mean([r.success for r in results]), np.mean([r.translation_error for r in results])))

# ## Heatmaps
#
# Pick position, pick angle and one place map per rotation bin.

scene = generate(split_seeds("test", cfg.seed, 1)[0], cfg.task)
pm = agent.pick_maps(scene.image)
uv = np.unravel_index(int(np.argmax(pm.position)), pm.position.shape)
files = export_maps(pm, agent.place_map(scene.image, uv), out_dir)
print("wrote %d files to %s" % (len(files), out_dir))
