from utils.error_handling import ErrorHandler

# trace_handler and config depend on the corrotdr package; import them by module path
__all__ = ['ErrorHandler']
