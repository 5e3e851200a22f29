# kinex - Modelos cinéticos de troca de riqueza
# Densidades, operadores de troca, transformadas de Laplace e simulação de agentes
