from .archive import ArchiveError, read_archive, write_archive
from .scenes import (
    KEEP_LANE,
    LANE_CHANGE,
    SLOT_NAMES,
    DegenerateScenarioError,
    Neighbor,
    NeighborGeometry,
    NeighborGrid,
    Scenario,
    SplitSpec,
    assign_neighbors,
    balance_scenarios,
    extract_scenarios,
    ghost_of,
    preprocess,
    split_dataset,
    to_target_frame,
)
from .synth import SynthSpec, synth_generate, synth_recording
from .tracks import HIGHD, NGSIM, FormatConfig, ParseError, SchemaError, Track, load_tracks, write_tracks
