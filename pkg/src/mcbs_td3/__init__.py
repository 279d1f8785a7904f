"""TD3 with Monte Carlo beam search action selection, on small snapshot-capable environments."""

from .config import RunConfig, load_config
from .envs import DoubleIntegrator, EnvSnapshot, EnvSpec, LinearTrack, PendulumSwingUp, StepResult, make_env
from .harness import MetricsRow, ablate, evaluate, steps_to_fraction, train
from .nets import Mlp, init_mlp, mlp_backward, mlp_forward, polyak_update, sgd_adam_step
from .planner import BudgetLedger, Candidate, McbsConfig, plan_action
from .replay import ReplayBuffer, Transition
from .td3 import Td3Agent, Td3Config

__version__ = "0.1.0"
