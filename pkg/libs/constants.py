"""CONSTANTS
All the global constants of the project are kept in one frozen dataclass

License: MIT
"""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Constants:
    # resources
    infinite = math.inf  # non-consumable resource amount

    # game defaults
    alpha1 = 0.5
    alpha2 = 1.0
    alpha3 = 1.0
    alpha4 = 0.1
    gamma_eps = 0.0
    snr_threshold = 1e-4
    deadline_factor = 1.0
    merge_split_eps = 1e-9
    initial_credit = 1.0
    saturation_scale = 1e3  # L = scale * (bounded terms)

    # merge-and-split
    max_split_enumeration = 12  # coalition size up to which all bipartitions are tried
    max_merge_enumeration = 8  # blocks up to which every merge collection is tried

    # beamforming
    ascent_tolerance = 1e-8
    ascent_max_iterations = 10_000
    relative_precision = 1e-6  # bisection delta relative to t_up
    oracle_max_size = 4

    # scenario
    distance_floor = 1e-3  # fraction of the field radius
    default_seed = 2018

    # outputs
    float_format = '%.9g'
    credits_columns = ['round', 'uav_id', 'credit']
    efficiency_columns = ['round', 'task_id', 'method', 'ef']
    snr_columns = ['round', 'coalition', 'snr', 't_up', 'iterations']
    output_formats = ['csv', 'jsonl']
