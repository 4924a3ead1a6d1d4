from .seqgen import BitSequence, BurstSpec, SampledWaveform, SequenceGenerator
from .fibersim import (
    CaptureSettings,
    DispersionParams,
    FiberModel,
    FiberSimulator,
    ReflectionEvent,
    TemperatureProfile,
    Trace,
)
from .corrproc import CorrelationProcessor, CorrelationResult, SidelobeFilter
from .peakfit import LatencyPipeline, LatencyReport, PeakEstimate, PeakFitter, PipelineConfig
from .cdscan import DispersionResult, DispersionScanner, WavelengthEntry, WavelengthScan

__all__ = [
    'BitSequence', 'BurstSpec', 'SampledWaveform', 'SequenceGenerator',
    'CaptureSettings', 'DispersionParams', 'FiberModel', 'FiberSimulator',
    'ReflectionEvent', 'TemperatureProfile', 'Trace',
    'CorrelationProcessor', 'CorrelationResult', 'SidelobeFilter',
    'LatencyPipeline', 'LatencyReport', 'PeakEstimate', 'PeakFitter', 'PipelineConfig',
    'DispersionResult', 'DispersionScanner', 'WavelengthEntry', 'WavelengthScan',
]
