"""Sensorless speed, temperature and resistance estimation for brushed DC machines.

A cascade-forward network trained with Rprop maps terminal voltage and current
to speed, armature temperature rise and armature resistance, using data from a
lumped electro-thermo-mechanical machine model.
"""

__version__ = "0.1.0"
