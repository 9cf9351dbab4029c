"""Tests for faultsim"""
