"""Simulated force-aware grasping: impedance gripper physics, tactile
sensing, a hybrid force-position controller, metrics, dataset generation and
a flow-matching policy."""

__version__ = "0.1.0"
