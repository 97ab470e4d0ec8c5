"""Tractor-trailer navigation with MPPI and learned point-to-polygon distances."""
from .distance import EncoderDistance, ExactDistance
from .encoder import DualEncoder, EncoderNetwork, TrainConfig, generate_dataset, load_weights, save_weights, train
from .exceptions import (
    ConfigError,
    CorruptWeights,
    DegeneratePolygon,
    DegenerateWeights,
    DimensionMismatch,
    EmptyCloud,
    EncoderMissing,
    GeometryError,
    NonConvex,
    PolygonMismatch,
    SteeringSingularity,
    TrailerNavError,
)
from .geometry import (
    ConvexPolygon,
    Pose2D,
    closed_form_distance,
    make_polygon,
    min_distance_to_cloud,
    rectangle,
    solve_dual_bcd,
)
from .mppi import ControllerState, MPPIController, MppiConfig, control_step
from .perception import LidarConfig, Obstacle, PointCloud, World, scan
from .scenario import Scenario, load_scenario, paper_scenario
from .sim import RunResult, benchmark_distance, run_scenario, simulate, train_encoders
from .vehicle import ControlInput, VehicleParams, VehicleState, footprint, step

__version__ = "0.1.0"
