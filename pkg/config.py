"""
Configuration for the rfc-cert toolkit
Numerical defaults plus per-environment logging settings
"""
import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    """Base configuration"""
    # Logging
    LOG_LEVEL = os.environ.get('RFC_CERT_LOG_LEVEL') or 'INFO'
    LOG_FILE = os.environ.get('RFC_CERT_LOG_FILE') or 'logs/rfc_cert.log'
    LOG_MAX_BYTES = 10240000  # 10MB
    LOG_BACKUP_COUNT = 10
    TESTING = False

    # Worker threads for batch evaluation
    JOBS = int(os.environ.get('RFC_CERT_JOBS') or 1)

    # Report format
    SCHEMA_VERSION = 1

    # Integration
    INTEGRATOR_TOL = 1e-9
    ESCAPE_THRESHOLD = 1e9
    AXIOM_TOL_FACTOR = 50

    # Comparison functions
    KNOT_COUNT = 512
    KNOT_S_MIN = 1e-6
    KNOT_S_MAX = 1e3
    SLOPE_FLOOR = 1e-12

    # Reachability envelopes
    R_MIN = 1e-3
    REFINE_TOP_Q = 5
    REFINE_SWEEPS = 3

    # Converse Lyapunov construction
    T_DIVISIONS = 512
    TAIL_TOL = 1e-6
    K_MIN = 20
    DINI_H_SEQ = (1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5)
    DINI_TOL_FLOOR = 1e-4
    TOL_PAD = 1e-6


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('RFC_CERT_LOG_LEVEL') or 'DEBUG'


class ProductionConfig(Config):
    """Batch runs on shared machines"""
    LOG_LEVEL = os.environ.get('RFC_CERT_LOG_LEVEL') or 'INFO'
    LOG_FILE = os.environ.get('RFC_CERT_LOG_FILE') or 'logs/rfc_cert_production.log'


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_LEVEL = 'WARNING'


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config(name=None):
    """Resolve a configuration class by name, falling back to RFC_CERT_ENV"""
    name = name or os.environ.get('RFC_CERT_ENV') or 'default'
    if name not in config:
        raise KeyError(f"Unknown configuration '{name}'. Choose one of: {', '.join(sorted(config))}")
    return config[name]
