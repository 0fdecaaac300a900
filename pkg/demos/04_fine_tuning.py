"""
Re-using a trained estimator for a nearby placement
====================================================

Moving a few anchors by some tens of centimeters changes the channel only a
little, so a network trained on the old placement is a good starting point.
"""
from mineloc import NoiseModel, ReferencePlacement, Scene, TrainConfig, fine_tune, square_room, train
from mineloc.mine import SceneSource, select_parent

room = square_room()
noise = NoiseModel("gaussian", 0.2)
parents = {
    "corners": ReferencePlacement.from_xy([[0.5, 0.5], [3.5, 0.5], [0.5, 3.5], [3.5, 3.5]], 2.5),
    "diamond": ReferencePlacement.from_xy([[2.0, 0.5], [3.5, 2.0], [2.0, 3.5], [0.5, 2.0]], 2.5),
}
child = ReferencePlacement.from_xy([[0.7, 0.5], [3.5, 0.7], [0.5, 3.3], [3.3, 3.5]], 2.5)

pid = select_parent(child, parents)
print("closest parent:", pid)
parent_net, ptrace, _ = train(SceneSource(Scene.build(room, parents[pid]), noise, 0),
                              TrainConfig(epochs=10_000, window=1000))
print(f"parent estimate {ptrace.estimate(1000):.3f} nats")

child_scene = Scene.build(room, child)
cfg = TrainConfig(epochs=2000, window=500, seed=1)
_, tuned, _ = fine_tune(parent_net, SceneSource(child_scene, noise, 1), cfg)
_, scratch, _ = train(SceneSource(child_scene, noise, 1), cfg)
print(f"after {cfg.epochs} epochs: fine-tuned {tuned.estimate(500):.3f}, from scratch {scratch.estimate(500):.3f} nats")
