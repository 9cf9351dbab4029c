"""Earthquake cycle simulation on layered 2D fault systems"""
