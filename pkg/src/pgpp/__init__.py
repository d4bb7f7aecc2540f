"""Privacy-preserving cellular core: location-privacy paging simulation,
anonymous token authentication, and shared-IMSI AKA modelling."""

__version__ = "0.1.0"
