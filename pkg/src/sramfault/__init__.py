"""Fault modelling for undervolted SRAM and fault injection into DNN weights."""

from .faultmap import FaultDataset, FaultMap, SramGeometry, load_dataset, read_faultmap, write_faultmap
from .generator import GenerationConfig, GenerationReport, generate, generate_mixed, generate_random
from .injector import BitMapping, MaskPolicy, Precision, inject, layout, quantize, readback
from .profiler import FaultProfile, extract_profile, load_profile, save_profile

__version__ = "0.1.0"

__all__ = [
    "BitMapping",
    "FaultDataset",
    "FaultMap",
    "FaultProfile",
    "GenerationConfig",
    "GenerationReport",
    "MaskPolicy",
    "Precision",
    "SramGeometry",
    "extract_profile",
    "generate",
    "generate_mixed",
    "generate_random",
    "inject",
    "layout",
    "load_dataset",
    "load_profile",
    "quantize",
    "read_faultmap",
    "readback",
    "save_profile",
    "write_faultmap",
]
