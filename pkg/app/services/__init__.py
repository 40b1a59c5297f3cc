"""Numerical services and the experiment runner."""





