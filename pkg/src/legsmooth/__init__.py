"""Contact-aided inertial smoothing for legged robots.

Batch MAP estimation over a factor graph whose measurements are
preintegrated IMU, leg forward kinematics, and foot-contact constraints,
plus loop closures. Submodules:

  manifold        rotation/pose primitives
  kinematics      chains, forward kinematics, encoder-noise propagation
  preintegration  IMU and contact preintegrated measurements
  graph           factors, linearization, Levenberg-Marquardt
  sim             walking simulator (ground truth + corruption)
  dataio          dataset and config file formats
  pipeline        graph assembly from datasets, presets, error metrics
  cli             command line front end (generate / run / compare)
"""

__version__ = "0.1.0"
