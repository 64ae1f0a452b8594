from .hrtf import HrtfSet, load_hrtf_set, save_hrtf_set, spherical_head_hrtf
from .rir import (RoomSpec, energy_decay_curve, estimate_t60, simulate_rir, simulate_rirs,
                  split_direct_early)
from .synth import (ALPHA_SET, Mixture, SceneSpec, SceneSynth, Segment, plane_wave_capture,
                    random_scene, synth_mixture, synth_target_binaural)
