"""faultsim docs"""
